"""Training-time environment poisoning of a gridworld Q-learner with a DDPG attacker."""

__version__ = "0.1.0"
