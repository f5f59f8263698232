# tcc/__init__.py
