"""
Test suite for fifuse.

This package contains unit tests per module, end-to-end CLI and library
tests, and slow desk-scale trend tests.
"""
