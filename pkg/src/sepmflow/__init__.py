"""sepmflow: simulator and routing compiler for S-EPM valve networks."""

__version__ = "0.1.0"
