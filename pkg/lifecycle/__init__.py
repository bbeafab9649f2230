# Action lifecycle package
