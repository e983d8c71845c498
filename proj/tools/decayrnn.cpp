#include "decayrnn/cli.hpp"

int main(int argc, char** argv) { return decayrnn::run(argc, argv); }
