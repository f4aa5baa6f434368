"""Node/flow orchestration behind the remos subcommands."""
