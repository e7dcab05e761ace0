"""Synthetic radial distribution feeders from a graph Wasserstein GAN."""
from .graph import DeviceNode, FeederGraph, Phase, downstream, out_degree_histogram, validate_radial
from .ingest import (FeatureScales, GraphTensors, RawFeederModel, compute_topological_features,
                     device_as_node, encode_attributes, load_feeder, normalize_adjacency,
                     parse_feeder_file)

__version__ = "0.1.0"
