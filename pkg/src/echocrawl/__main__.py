"""Module entry point: ``python -m echocrawl``."""

from .cli import main

raise SystemExit(main())
