"""Freshness-aware scheduling for RF-powered IoT devices.

Builds the average-cost MDP that trades wireless energy transfer against
status-update transmissions, solves it for age-optimal or throughput-optimal
policies, traces the achievable AoI region and measures AoI, peak AoI and
VoIU on update traces.
"""

__version__ = "0.1.0"
