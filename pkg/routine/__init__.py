# Routine DAG package
