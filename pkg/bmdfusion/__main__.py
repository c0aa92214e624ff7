import sys

from bmdfusion.cli import main

sys.exit(main())
