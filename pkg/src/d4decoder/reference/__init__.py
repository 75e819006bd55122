"""Reference variables and units."""
