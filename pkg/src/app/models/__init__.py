"""Motion, configuration, edit-constraint and error types."""
