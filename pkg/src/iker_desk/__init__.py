"""
iker-desk
Keypoint-reward planning and reinforcement learning for tabletop manipulation at desk scale
"""

__version__ = "1.0.0"
