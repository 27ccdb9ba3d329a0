#include <stdio.h>
#include <string.h>

static const char *greeting = "hello, world";

int square(int x)
{
    return x * x;
}

int main(int argc, char **argv)
{
    /* print the greeting and argument count */
    printf("%s // not a comment\n", greeting);
    if (argc > 1 && strcmp(argv[1], "-v") == 0)
        printf("verbose /* still a string */\n");
    printf("%d\n", square(argc));
    return 0;
}
