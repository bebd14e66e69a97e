"""Hierarchical RL for a 20-image guessing game on synthetic embedding
worlds: simulator, dialog state tracking with state adaptation, a
Double-DQN master policy, a DRRN question selector and the training
harness for the five-way ablation."""

__version__ = "0.1.0"
