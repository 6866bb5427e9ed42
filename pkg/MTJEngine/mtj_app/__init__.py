"""Initialize the mtj_app package."""
__version__ = '1.0.0'
