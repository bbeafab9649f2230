# DAG-TL scheduling package
