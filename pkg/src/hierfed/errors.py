"""Exception types shared across the simulator."""


class ConfigurationError(Exception):
    """Invalid configuration value, inconsistent dimensions, or unknown key."""


class DataFormatError(Exception):
    """Malformed input data (CSV rows, snapshots, metrics files)."""


class DivergenceError(Exception):
    """Local training blew up; carries the agent id and learning rate."""

    def __init__(self, agent_id, lr, start_value, current_value):
        self.agent_id = agent_id
        self.lr = lr
        super().__init__(
            f"local objective diverged for agent {agent_id} (lr={lr}): "
            f"{start_value:.6g} -> {current_value:.6g}"
        )
