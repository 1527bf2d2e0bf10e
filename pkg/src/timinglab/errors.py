"""Exception types. Every error carries a short machine-readable ``code``."""


class LabError(Exception):
    exit_code = 1

    def __init__(self, code: str, detail: str = ""):
        self.code = code
        self.detail = detail
        super().__init__(f"{code}: {detail}" if detail else code)


class ConfigError(LabError):
    """Bad user input: malformed config, unknown preset, missing scenario."""

    exit_code = 2


class DataError(LabError):
    """Input data that cannot be processed (bad pcap, short trace, ...)."""

    exit_code = 3
