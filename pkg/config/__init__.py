"""Project settings package."""
