# GAN Filter Transfer - Source Package
