"""`convnn.models.__init__.py`"""
