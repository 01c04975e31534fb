# Tests module initialization 
