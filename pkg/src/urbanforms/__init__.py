"""Urban-form analysis toolkit: rasterized street networks, learned urban
vectors, similarity search, SOM spectra and cluster topology."""

__version__ = "0.1.0"
