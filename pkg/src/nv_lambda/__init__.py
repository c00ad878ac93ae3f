# nv-lambda/src/nv_lambda/__init__.py
"""
nv-lambda: all-optical control of an NV-center spin modelled as a driven lambda system.
"""
__version__ = "0.1.0"
