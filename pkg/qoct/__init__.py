# __init__.py for the qoct package

__version__ = '1.0.0'
