# Duration distributions package
