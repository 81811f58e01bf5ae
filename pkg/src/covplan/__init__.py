"""Coverage path planning workbench: grid-world coverage MDP, DQN-PER agent,
zigzag/A*/BA* baselines, hybrid zigzag+RL control and a tabular lab for the
sampled Bellman operator."""

__version__ = "0.1.0"
