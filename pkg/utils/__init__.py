# Utils module initialization 
