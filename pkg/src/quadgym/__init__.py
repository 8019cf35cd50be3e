"""quadgym: quadruped locomotion RL suite.

Trains and evaluates locomotion policies for two robot morphologies
(12 actuated joints vs. 16 with prismatic foot extensions) over procedurally
generated terrains, and compares them by cost of transport.
"""

__version__ = "0.1.0"
