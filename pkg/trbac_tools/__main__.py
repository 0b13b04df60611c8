"""python -m trbac_tools ..."""

from .cli import main

main()
