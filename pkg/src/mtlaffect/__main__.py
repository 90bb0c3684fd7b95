"""``python -m mtlaffect``."""
import sys

from .cli import main

sys.exit(main())
