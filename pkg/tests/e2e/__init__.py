# End-to-end synthetic runs
