"""Convert MTP (Module Type Package) files into a capability/skill RDF graph,
check it with competency questions, and execute the mapped skills against a
simulated process module."""

__version__ = "0.1.0"
