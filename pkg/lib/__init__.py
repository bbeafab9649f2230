# Shared settings, console output and errors
