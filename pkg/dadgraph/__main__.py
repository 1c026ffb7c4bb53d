import sys

from dadgraph.engine.cli import main

sys.exit(main())
