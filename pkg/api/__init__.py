# Poll plan service
