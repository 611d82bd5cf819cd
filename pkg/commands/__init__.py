# commands/__init__.py
# Empty file just to make "commands" a package.
