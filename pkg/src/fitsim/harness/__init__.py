"""Configuration, snapshots and the ``fitsim`` command line."""
