"""Deterministic simulator of an all-in-focus iris capture rig.

The package models a telephoto zoom lens, a focus-tunable liquid lens and
a two-axis steering mirror well enough to reproduce the rig's headline
behaviours in software: depth-of-field extension, Hamming-distance
matching across defocus, multi-person refocusing and capture of a moving
subject.  Everything is seeded; identical seeds give identical bytes.
"""

__version__ = "0.1.0"
