// placeholder, filled as the module lands
