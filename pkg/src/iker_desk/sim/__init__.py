"""
Tabletop geometry, scenes and the quasi-static simulator
"""
