#include "citras/app.hpp"

int main(int argc, char** argv) { return citras::run_cli(argc, argv); }
