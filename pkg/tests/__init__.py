# rainsar tests
