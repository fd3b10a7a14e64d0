"""Reactive network-exposure scanner and analysis pipeline.

Given an attached network (a real interface or the in-process simulator),
the scanner discovers internally routable hosts with active and reactive
probes, fingerprints exposed services over fourteen protocols, and the
analysis side builds an exposure graph, filters Internet-visible services,
and classifies each exposure by stakeholder.
"""

__version__ = "0.1.0"
