"""
Command-line surface for VertexRisk.
"""
