import sys

from pulsedint.cli import main

sys.exit(main())
