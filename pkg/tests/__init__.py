# This file marks the tests directory as a package for Python import resolution.
# It’s not strictly required by pytest, but can help with relative imports if needed.

