import sys

from gelshatter.cli import main

sys.exit(main())
