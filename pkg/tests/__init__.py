# scatterguard tests
