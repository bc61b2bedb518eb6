"""rainsar services."""
