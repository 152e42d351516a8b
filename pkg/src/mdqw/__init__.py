"""Multidimensional quantum walks: electrical networks, alternating neighbourhoods and graph instances."""
