# QQL toolkit: quantile Q-learning, the XQL baseline and toy oracles
__version__ = "0.1.0"
