"""Stock ranking with motif-based relation graphs, an LSTM encoder and graph attention."""

__version__ = "0.1.0"
