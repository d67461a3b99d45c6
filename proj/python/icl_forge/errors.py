class IclForgeError(Exception):
    """Raised for every library failure; `code` names the failure kind."""

    def __init__(self, message, code="", ids=()):
        super().__init__(message)
        self.code = code
        self.ids = list(ids)
