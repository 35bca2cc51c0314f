"""Off-policy inverse reinforcement learning via distribution matching.

Learns a transferable reward from expert demonstrations using replay-buffer
data only, and ships a brute-force oracle suite that certifies the
mathematical identities the objective rests on.
"""

__version__ = "0.1.0"
