"""
iker-desk source tree
"""
