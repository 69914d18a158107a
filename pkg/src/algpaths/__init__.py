"""algpaths: numerical Lie algebroid paths, comorphism lifting, holonomy
diagnostics, and Poisson completeness probes."""

__version__ = "0.1.0"
