# Rescheduling package
