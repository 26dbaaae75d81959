"""Channel-wise CNN embeddings, autoencoder-ensemble channel selection and evaluation for EEG trials."""

__version__ = "0.1.0"
