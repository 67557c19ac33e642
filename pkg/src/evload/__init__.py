"""EV charging demand forecasting: cleaning, daily features, LSTM training and grid checks."""

__version__ = "0.1.0"
