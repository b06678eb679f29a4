"""Graph convolution over knowledge graphs where messages are analytic
gradients of knowledge-embedding scoring functions, so entity and
relation embeddings update jointly."""

__version__ = "0.1.0"
